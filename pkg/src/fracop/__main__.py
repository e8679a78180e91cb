from .oplab.cli import main

main()
