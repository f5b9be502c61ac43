"""Role-based contextual models for dialogue language understanding and guide-action prediction."""

__version__ = "0.1.0"
