from urcod.cli import main

main()
