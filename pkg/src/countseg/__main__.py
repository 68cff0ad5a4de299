from countseg.cli import entry

entry()
