from fastapi import HTTPException, Request, status

from core.errors import NMTError, NumericError
from services.translator import Translator

# Raised when the service started without a usable MODEL_PATH
NO_MODEL_EXCEPTION = HTTPException(
    status_code=status.HTTP_503_SERVICE_UNAVAILABLE,
    detail="No translation model is loaded.",
)


def get_translator(request: Request) -> Translator:
    translator = getattr(request.app.state, "translator", None)
    if translator is None:
        raise NO_MODEL_EXCEPTION
    return translator


def http_error(exc: NMTError) -> HTTPException:
    """Data and config problems are the caller's fault; numeric failures are not."""
    if isinstance(exc, NumericError):
        return HTTPException(status_code=status.HTTP_422_UNPROCESSABLE_ENTITY, detail=str(exc))
    return HTTPException(status_code=status.HTTP_400_BAD_REQUEST, detail=str(exc))
