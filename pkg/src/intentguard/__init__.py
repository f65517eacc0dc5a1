"""Protect a data buyer's purchase intent against inference attacks."""
