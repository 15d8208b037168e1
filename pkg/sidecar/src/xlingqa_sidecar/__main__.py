"""Run the sidecar: python -m xlingqa_sidecar [--host H] [--port P] ..."""

import argparse

import uvicorn

from .app import create_app
from .config import SidecarConfig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="xlingqa-sidecar", description=__doc__)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8901)
    parser.add_argument("--encoder-model", default="stub:768")
    parser.add_argument("--generator-model", default="stub")
    parser.add_argument("--max-batch", type=int, default=128)
    parser.add_argument("--max-answer-tokens", type=int, default=25)
    args = parser.parse_args(argv)

    config = SidecarConfig.from_env(
        encoder_model=args.encoder_model,
        generator_model=args.generator_model,
        host=args.host,
        port=args.port,
        max_batch_size=args.max_batch,
        max_answer_tokens=args.max_answer_tokens,
    )
    uvicorn.run(create_app(config), host=config.host, port=config.port,
                log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
