"""NL-to-CPGQL translation pipelines and their evaluation harness."""

__version__ = "0.1.0"
