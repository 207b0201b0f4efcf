"""Exception types shared across the package."""


class DomainError(ValueError):
    """Raised when an operation is called outside its numerical domain.

    Examples: negative times, density evaluation too close to the horizon,
    grid/horizon mismatches. The CLI maps this to exit code 2.
    """
