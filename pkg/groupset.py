#!/usr/bin/env python3
# groupset.py - command-line entry point

import os
import sys

# Add the current directory to Python path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from runner import GroupSetRunner

def main():
    """Main entry point for the GroupSet command line."""
    sys.exit(GroupSetRunner().run(sys.argv[1:]))

if __name__ == "__main__":
    main()
