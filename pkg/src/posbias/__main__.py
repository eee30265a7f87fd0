from posbias.cli import main

raise SystemExit(main())
