import jinja2

from pathlib import Path
from typing import Any


def fmt_number(value: float | None, spec: str = ".2f", missing: str = "-") -> str:
    if value is None:
        return missing
    return format(value, spec)


class TextGenerator:
    def __init__(self) -> None:
        self.env = jinja2.Environment(
            loader=jinja2.ChoiceLoader([]),
            trim_blocks=True,
            lstrip_blocks=True,
            keep_trailing_newline=True,
            undefined=jinja2.StrictUndefined,
        )
        self.env.filters["num"] = fmt_number

    def add_template_loader(self, loader: jinja2.BaseLoader) -> None:
        assert isinstance(self.env.loader, jinja2.ChoiceLoader)
        self.env.loader.loaders.append(loader)  # type: ignore

    def render(self, tmpl_subpath: Path | str, ctx: dict[str, Any] = dict()) -> str:
        tmpl = self.env.get_template(str(tmpl_subpath))
        return tmpl.render(**ctx)


class PackageTextGenerator(TextGenerator):
    def __init__(self) -> None:
        super().__init__()
        self.add_template_loader(jinja2.PackageLoader(__name__, "templates"))
