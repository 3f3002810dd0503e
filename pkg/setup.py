"""
Setup script for the Class Support Networks tool.
Installs dependencies, prepares the cache directory and optionally
downloads Omniglot.
"""

import os
import subprocess
import sys


def main():
    """Set up the environment for csnet_tool.py"""
    print("=== Class Support Networks Setup ===")
    print("This script will help set up the tool on your system.\n")

    # 1. Check Python version
    print("Checking Python version...")
    version = sys.version_info
    if version < (3, 9):
        print("WARNING: This tool needs Python 3.9 or newer.")
        print(f"Your version: Python {version.major}.{version.minor}.{version.micro}\n")
    else:
        print(f"Python version looks good: {version.major}.{version.minor}.{version.micro}\n")

    # 2. Install dependencies
    print("Installing required packages...")
    try:
        subprocess.check_call(
            [sys.executable, "-m", "pip", "install", "-r", "requirements.txt"]
        )
        print("Dependencies installed successfully!\n")
    except subprocess.CalledProcessError as e:
        print(f"Error installing packages: {e}")
        print("Please try installing them manually using: pip install -r requirements.txt\n")
        return 1

    # 3. Create cache directory
    cache = os.environ.get("CSNET_CACHE_DIR", "data")
    print("Setting up directories...")
    os.makedirs(cache, exist_ok=True)
    print(f"Created '{cache}' directory for dataset caches (override with CSNET_CACHE_DIR).\n")

    # 4. Optional Omniglot download
    print("Would you like to download Omniglot (~10 MB)? (y/n)")
    choice = input("> ").lower()
    if choice.startswith("y"):
        try:
            subprocess.check_call(
                [sys.executable, "csnet_tool.py", "ingest-omniglot", "--download"]
            )
        except subprocess.CalledProcessError as e:
            print(f"Error downloading Omniglot: {e}")
            print("You can retry later: python csnet_tool.py ingest-omniglot --download")
    else:
        print("\nOmniglot skipped. The synthetic family needs no download.")

    # 5. Show usage instructions
    print("\n=== Setup complete! ===")
    print("To use the tool:")
    print("1. Gradient self-test: python csnet_tool.py gradcheck")
    print("2. Desk-scale run: python csnet_tool.py train --config configs/synth_5way_1shot.json")
    print("3. All commands: python csnet_tool.py --help")
    print("\nFor more information, see the README.md file.")
    return 0


if __name__ == "__main__":
    if len(sys.argv) > 1:
        # Invoked by a build backend / pip (e.g. egg_info, dist_info,
        # editable_wheel): defer to setuptools and pyproject.toml metadata.
        from setuptools import setup

        setup()
    else:
        sys.exit(main())
