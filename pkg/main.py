import logging
import os
from contextlib import asynccontextmanager

from dotenv import load_dotenv
from fastapi import FastAPI

from api.background_jobs_routes import router as background_jobs_router
from api.translate_routes import router as translate_router
from core.errors import NMTError
from services.translator import Translator

logger = logging.getLogger(__name__)

# Load environment variables from .env file, if it exists
load_dotenv()


def load_translator(model_path: str | None) -> Translator | None:
    if not model_path:
        logger.warning("MODEL_PATH is not set; translation endpoints will answer 503")
        return None
    try:
        return Translator.load(model_path)
    except NMTError as exc:
        logger.error("Could not load model from %s: %s", model_path, exc)
        return None


# Load the model once at startup; requests share it read-only
@asynccontextmanager
async def lifespan(app: FastAPI):
    app.state.translator = load_translator(os.getenv("MODEL_PATH"))
    yield
    app.state.translator = None


app = FastAPI(lifespan=lifespan)

app.include_router(translate_router, prefix="/translate", tags=["Translate"])
app.include_router(background_jobs_router, prefix="/jobs", tags=["Background Jobs"])


@app.get("/health")
def health():
    translator = getattr(app.state, "translator", None)
    return {
        "status": "ok",
        "model_loaded": translator is not None,
        "variant": translator.config.variant if translator is not None else None,
    }
