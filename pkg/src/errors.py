class ConfigurationError(ValueError):
    '''an experiment / model configuration violates one of its invariants'''


class InputError(ValueError):
    '''a tensor or matrix handed to an operation has the wrong shape or content'''


class TrainingError(RuntimeError):
    '''training cannot continue (e.g. the loss became non-finite)'''
