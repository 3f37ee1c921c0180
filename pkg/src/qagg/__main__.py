from qagg.cli import entry

entry()
