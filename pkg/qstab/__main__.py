# Makes `python -m qstab ...` behave like the qstab script
from qstab.cli import main

if __name__ == "__main__":
    main()
