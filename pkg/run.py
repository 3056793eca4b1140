import sys

from shotnoise.cli import dispatch


def main():
    """Main command-line entry point"""

    # e.g. python run.py verify --config shotnoise/benchmarks/verify.json
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == '__main__':
    main()
