from datetime import datetime
from pathlib import Path
from typing import Dict, Optional

from sqlalchemy.engine import Engine
from sqlmodel import JSON, Column, Field, SQLModel, create_engine

INDEX_DB_NAME = "index.db"


class IndexMeta(SQLModel, table=True):
    id: Optional[int] = Field(default=None, primary_key=True)
    version: int = 1
    working_width: int
    working_height: int
    domain: str = "log"
    settings: Dict = Field(default={}, sa_column=Column(JSON))
    created_at: datetime = Field(default_factory=datetime.utcnow)


class RecordRow(SQLModel, table=True):
    id: Optional[int] = Field(default=None, primary_key=True)
    clip_id: str = Field(index=True)
    frame_index: int
    image_path: str
    depth_path: Optional[str] = None
    content_hash: str = Field(index=True)


def index_engine(index_dir: Path) -> Engine:
    index_dir = Path(index_dir)
    index_dir.mkdir(parents=True, exist_ok=True)
    url = f"sqlite:///{index_dir / INDEX_DB_NAME}"
    return create_engine(url, connect_args={"check_same_thread": False})


def create_db_and_tables(engine: Engine):
    """Initializes the index descriptor schema."""
    SQLModel.metadata.create_all(engine)
