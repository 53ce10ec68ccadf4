"""Local-Sieve: drift-robust approximate top-k KV retrieval"""
