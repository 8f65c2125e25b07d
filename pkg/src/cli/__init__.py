# CLI package for interbank-risk
