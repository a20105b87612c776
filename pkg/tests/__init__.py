"""Test suite for the constrained inference engine"""
