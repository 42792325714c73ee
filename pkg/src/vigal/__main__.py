from vigal.cli import main

raise SystemExit(main())
