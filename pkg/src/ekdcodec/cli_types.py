import click


class FractionType(click.ParamType):
    """
    A fraction in (0, 1], written either as `0.1` or as `10%`.
    """

    name = "fraction"

    def convert(self, value: str | float, param, ctx) -> float:
        if isinstance(value, float):
            return value

        text = value.strip()
        percent = text.endswith("%")
        try:
            fraction = float(text.removesuffix("%"))
        except ValueError:
            self.fail(f"{value!r} is not a valid fraction", param, ctx)

        if percent:
            fraction /= 100
        if not 0 < fraction <= 1:
            self.fail(f"{value!r} is not a valid fraction: must be in (0, 1]", param, ctx)
        return fraction


class ListType(click.ParamType):
    """
    A comma-separated list such as `10,1e2,1e3`.
    """

    def __init__(self, item: type, name: str):
        self.item = item
        self.name = name

    def convert(self, value: str | list, param, ctx) -> list:
        if isinstance(value, list):
            return value

        items = []
        bad = []
        for part in value.split(","):
            try:
                items.append(self.item(part.strip()))
            except ValueError:
                bad.append(part.strip())

        if bad:
            reasons = ", ".join(repr(b) for b in bad)
            self.fail(f"{value!r} is not a valid {self.name}: {reasons}", param, ctx)
        return items


FRACTION = FractionType()
FLOAT_LIST = ListType(float, "float list")
INT_LIST = ListType(int, "int list")
