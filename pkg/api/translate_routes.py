import logging
from typing import Optional

from fastapi import APIRouter, Depends
from pydantic import BaseModel, Field

from core.deps import get_translator, http_error
from core.errors import NMTError
from services.translator import Translator
from utils.metrics import BleuResult, bleu

logger = logging.getLogger(__name__)

router = APIRouter()


class TranslateRequest(BaseModel):
    sentences: list[str] = Field(min_length=1)
    beam_size: Optional[int] = Field(default=None, ge=1)
    max_len: Optional[int] = Field(default=None, ge=1)
    alignments: bool = False


class Translation(BaseModel):
    source: str
    translation: str
    logprob: float
    alignments: Optional[list[list[float]]] = None


class TranslateResponse(BaseModel):
    variant: str
    translations: list[Translation]


class BleuRequest(BaseModel):
    hypotheses: list[str]
    references: list[str]


@router.post("", response_model=TranslateResponse)
def translate(request: TranslateRequest, translator: Translator = Depends(get_translator)):
    """
    Beam-search translate whitespace-tokenized sentences with the loaded model.
    """
    try:
        lines = translator.translate(request.sentences, request.beam_size, request.max_len)
    except NMTError as exc:
        logger.warning("[DECODE] request failed: %s", exc)
        raise http_error(exc)
    return TranslateResponse(
        variant=translator.config.variant,
        translations=[
            Translation(
                source=source,
                translation=line.text,
                logprob=line.logprob,
                alignments=line.alignments if request.alignments else None,
            )
            for source, line in zip(request.sentences, lines)
        ],
    )


@router.post("/bleu", response_model=BleuResult)
def corpus_bleu(request: BleuRequest):
    try:
        return bleu(request.hypotheses, request.references)
    except NMTError as exc:
        raise http_error(exc)
