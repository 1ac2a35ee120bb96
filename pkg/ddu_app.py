from ddu_ro.cli import main

if __name__ == '__main__':
    main()
