"""
Data models for the elliptic measure laboratory.

This module contains SQLAlchemy ORM models for:
- Scenario runs and their sweep points
- Invariant results
- Verification matrices
"""
