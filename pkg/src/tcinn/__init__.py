# Tracer-conversion invertible network engine.
