"""
Database Initialization Script
===============================
Creates the run-registry tables if they don't exist.

Usage:
    python scripts/init_db.py
"""

import logging
import sys
from pathlib import Path

# Add parent directory to path
project_root = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(project_root))

from db.database import DATABASE_URL, SessionLocal, TrainingRun, init_db  # noqa: E402

logger = logging.getLogger(__name__)


def setup_database() -> None:
    """Initialize database and create all tables"""
    logger.info("Creating run registry tables at %s", DATABASE_URL)
    init_db()
    db = SessionLocal()
    try:
        count = db.query(TrainingRun).count()
        logger.info("Database connection OK (%d registered runs)", count)
    finally:
        db.close()
    print("Tables: training_runs, epoch_logs, evaluation_results")


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    setup_database()
