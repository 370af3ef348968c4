"""
All custom Exceptions
"""

import json


# the CLI turns exceptions that inherit from this class into a one-line error report
class CommandLineError(Exception):
    """The traceback of all CommandLineError's is supressed when the
    errors occur on the command line; a single machine-readable line is
    printed instead (see machine_readable()).
    """

    def render(self, msg):
        return msg % vars(self)

    def machine_readable(self) -> str:
        return json.dumps(
            {"error": type(self).__name__, "message": str(self).strip()},
            ensure_ascii=False,
        )


class DimensionMismatch(CommandLineError):
    def __init__(self, what, expected, got):
        super().__init__(self)
        self.what = what
        self.expected = expected
        self.got = got

    def __str__(self):
        return self.render(
            'Dimension mismatch in %(what)s: expected %(expected)s, got %(got)s.'
        )


class ShapeMismatch(CommandLineError):
    def __init__(self, expected, got):
        super().__init__(self)
        self.expected = expected
        self.got = got

    def __str__(self):
        return self.render(
            "The predictor was queried with a state of shape %(got)s "
            "but it was built for shape %(expected)s."
        )


class InvalidParameter(CommandLineError):
    def __init__(self, name, value, requirement):
        super().__init__(self)
        self.name = name
        self.value = value
        self.requirement = requirement

    def __str__(self):
        return self.render(
            'Invalid value %(value)s for "%(name)s": it must be %(requirement)s.'
        )


class SingularChannel(CommandLineError):
    def __init__(self, indices):
        super().__init__(self)
        self.indices = list(indices)

    def __str__(self):
        return self.render(
            "\n"
            "The channel has singular values below the singularity threshold on "
            "sub-channel(s) %(indices)s.\n"
            "Pass a random stream to equalize() to replace them with noise."
        )


class InvalidSchedule(CommandLineError):
    def __init__(self, msg):
        super().__init__(self)
        self.msg = msg

    def __str__(self):
        return self.render(self.msg)


class TrainingDiverged(CommandLineError):
    def __init__(self, stage, iteration):
        super().__init__(self)
        self.stage = stage
        self.iteration = iteration

    def __str__(self):
        return self.render(
            "Training diverged in %(stage)s: the loss became NaN or infinite "
            "at iteration %(iteration)s. Try a smaller learning rate."
        )


class CheckpointMissing(CommandLineError):
    def __init__(self, path):
        super().__init__(self)
        self.path = str(path)

    def __str__(self):
        return self.render(
            'No checkpoint found at "%(path)s". Run "dmmimo train" first '
            "or pass --predictor oracle."
        )


class MalformedCheckpoint(CommandLineError):
    def __init__(self, msg):
        super().__init__(self)
        self.msg = msg

    def __str__(self):
        return self.render("There is something wrong with your checkpoint: %(msg)s")


class InvalidStage(CommandLineError):
    def __init__(self, stage):
        super().__init__(self)
        self.stage = stage

    def __str__(self):
        return self.render(
            'No training stage called "%(stage)s". Please use 1, 2 or 3.'
        )


class MalformedConfig(CommandLineError):
    def __init__(self, message=""):
        super().__init__(self)
        if message:
            self.message = "\n\n" + message
        else:
            self.message = ""

    def __str__(self):
        return self.render(
            (
                "\n"
                "There is something wrong with your experiment configuration.\n"
                "Please refer to the documentation and fix your config file."
                + self.message
            )
        )
