class ConfigError(ValueError):
    """Invalid experiment configuration; raised before any simulation."""


class NumericalError(ArithmeticError):
    pass


class SimulationDivergenceError(NumericalError):
    def __init__(self, beta, knot, time):
        self.beta = beta
        self.knot = knot
        self.time = time
        super().__init__(
            f"non-finite state for beta={beta:.6g} at knot {knot} (t={time:.6g})"
        )


class FlowDivergenceError(NumericalError):
    def __init__(self, iteration):
        self.iteration = iteration
        super().__init__(f"objective became non-finite at iteration {iteration}")
