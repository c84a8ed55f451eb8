"""Weight/feature exporter for the differflow formats."""
