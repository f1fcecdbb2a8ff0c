from faultflow.cli import main

raise SystemExit(main())
