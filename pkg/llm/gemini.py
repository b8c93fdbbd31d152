"""Gemini LLM provider."""
import os
from typing import Any, Dict, List, Optional

import google.generativeai as genai


class GeminiProvider:
    """Google Gemini AI provider (text generation and embeddings)."""

    def __init__(self, api_key: str = None, model: str = None, embedding_model: str = None,
                 timeout: float = 30.0):
        """
        Initialize Gemini provider.

        Args:
            api_key: Gemini API key (defaults to GEMINI_API_KEY env var)
            model: Model name (defaults to GEMINI_MODEL env var or gemini-flash-latest)
            embedding_model: Embedding model used for clinical-context vectors
            timeout: Per-request timeout in seconds
        """
        self.api_key = api_key or os.getenv('GEMINI_API_KEY')
        self.model = model or os.getenv('GEMINI_MODEL', 'gemini-flash-latest')
        self.embedding_model = embedding_model or os.getenv('GEMINI_EMBEDDING_MODEL', 'models/text-embedding-004')
        self.timeout = timeout

        if not self.api_key:
            raise ValueError("Gemini API key is required")

        genai.configure(api_key=self.api_key)
        self.client = genai.GenerativeModel(self.model)

    def format_prompt(self, fields: Dict[str, Any], template: str) -> str:
        """Format a prompt template; missing fields render as N/A."""
        return template.format_map(_Defaulted(fields))

    def generate(self, prompt: str) -> str:
        """
        Generate text using Gemini.

        Args:
            prompt: Input prompt text

        Returns:
            Generated text response
        """
        response = self.client.generate_content(prompt, request_options={'timeout': self.timeout})
        return response.text

    def embed(self, text: str, dim: Optional[int] = None) -> List[float]:
        """Embed ``text``; ``dim`` truncates the embedding server-side."""
        kwargs = {'output_dimensionality': dim} if dim else {}
        result = genai.embed_content(model=self.embedding_model, content=text, **kwargs)
        return list(result['embedding'])

    def is_available(self) -> bool:
        """Check if Gemini is available."""
        return bool(self.api_key)


class _Defaulted(dict):
    def __missing__(self, key):
        return 'N/A'
