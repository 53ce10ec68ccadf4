"""Attention oracles and prior checks for Local-Sieve"""
