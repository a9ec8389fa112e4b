from pencil_canon.cli import main

raise SystemExit(main())
