"""Entry point for `python -m photon_collapse`."""

from photon_collapse.app import main

if __name__ == "__main__":
    main()
