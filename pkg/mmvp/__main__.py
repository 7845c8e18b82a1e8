"""Entry point for running as python -m mmvp."""

from mmvp.cli import cli

if __name__ == "__main__":
    cli()
