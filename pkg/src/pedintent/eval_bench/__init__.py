"""Metrics, latency/memory benchmarks and tap-layer ablation."""
