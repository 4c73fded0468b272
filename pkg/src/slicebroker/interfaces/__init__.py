"""Northbound tenant endpoints, southbound config channel and the wire format."""
