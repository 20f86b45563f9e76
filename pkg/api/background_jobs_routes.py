import logging
from typing import Any, Dict, Optional
from uuid import uuid4

from fastapi import APIRouter, BackgroundTasks, Depends, HTTPException
from pydantic import BaseModel, Field

from core.deps import get_translator
from services.translator import Translator

logger = logging.getLogger(__name__)

router = APIRouter()


class JobStatus(BaseModel):
    status: str
    result: Optional[Any] = None
    error: Optional[str] = None


class CorpusDecodeRequest(BaseModel):
    sentences: list[str]
    beam_size: Optional[int] = Field(default=None, ge=1)
    workers: int = Field(default=1, ge=1)


# In-memory job store; jobs are lost on restart
job_store: Dict[str, JobStatus] = {}


def run_corpus_decode(job_id: str, translator: Translator, request: CorpusDecodeRequest) -> None:
    """
    Runs after the response is sent and records the outcome in ``job_store``.
    """
    try:
        lines = translator.translate(request.sentences, request.beam_size, workers=request.workers)
        job_store[job_id] = JobStatus(status="complete", result=[line.text for line in lines])
    except Exception as e:
        logger.error("[DECODE] background job %s failed: %s", job_id, e)
        job_store[job_id] = JobStatus(status="failed", error=str(e))


@router.post("/decode")
def request_corpus_decode(
    request: CorpusDecodeRequest,
    background_tasks: BackgroundTasks,
    translator: Translator = Depends(get_translator),
):
    """
    Kick off decoding of a whole corpus in the background.
    """
    job_id = str(uuid4())
    job_store[job_id] = JobStatus(status="in_progress")
    background_tasks.add_task(run_corpus_decode, job_id, translator, request)
    return {"job_id": job_id}


@router.get("/{job_id}", response_model=JobStatus)
def get_job_status(job_id: str):
    """
    Check the status of a previously requested decoding job.
    """
    job = job_store.get(job_id)
    if not job:
        raise HTTPException(status_code=404, detail="Job not found")
    return job
