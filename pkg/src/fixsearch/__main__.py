from fixsearch.cli import main

main()
