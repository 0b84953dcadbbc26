"""Run the clickgraph command line tool."""
import sys

from speedwagon_clickgraph.cli import main

if __name__ == "__main__":
    sys.exit(main())
