try:
    import coloredlogs

    coloredlogs.install(level="DEBUG")
except Exception:
    pass
