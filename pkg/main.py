from dotenv import load_dotenv

from pencil_canon.cli import main

# Load environment variables
load_dotenv()

if __name__ == "__main__":
    raise SystemExit(main())
