NON_FINITE_INPUT = 'Non-finite input: {name}={value}'
NON_POSITIVE_INPUT = '{name} must be positive, got {value}'
NEGATIVE_TAU = 'Time to maturity must be non-negative, got {value}'
NEGATIVE_TIME = 'Time must be non-negative, got {value}'
TERMINAL_STEP = 'Cannot step from a terminal state (step_index={step_index})'
HOLDING_OUT_OF_BOUNDS = 'Holding {holding} outside bounds [{low}, {high}]'
POLICY_NON_FINITE = 'Policy returned a non-finite holding {value} at step {step}'
COST_NON_FINITE = 'Non-finite cost in {count} path(s); first bad path {path}'
STEP_OUT_OF_RANGE = 'Step {step} outside [0, {n_steps})'
DIMENSION_MISMATCH = 'Input width {got} does not match layer width {expected}'
SHAPE_MISMATCH = 'Shape mismatch: {left} vs {right}'
ARCHITECTURE_MISMATCH = 'Network architectures differ: {left} vs {right}'
TAPE_REUSED = 'Gradient tape already consumed'
INVALID_DROPOUT = 'Dropout rate must be in [0, 1), got {value}'
INVALID_BLEND = 'Blend factor must be in [0, 1], got {value}'
SHOCKS_WIDTH = 'Shock matrix width {got} does not match n_steps {expected}'
EMPTY_BATCH = 'Batch is empty'
LOSS_NON_FINITE = 'Non-finite loss at {where}'
LOSS_DIVERGED = 'Loss {loss} exceeded divergence threshold {limit} at epoch {epoch}'
COALITION_UNKNOWN = 'Coalition {coalition} contains unknown feature indices'
TOO_MANY_FEATURES = 'Exact Shapley enumeration is capped at {cap} features, got {count}'
EMPTY_BACKGROUND = 'Background sample is empty'
NO_INSTANCES = 'At least one instance is required'
NOT_ENOUGH_SEEDS = 'Training stability needs at least 2 seeds, got {count}'
UNKNOWN_STRATEGY = 'Unknown strategy {name}'
UNKNOWN_AXIS = 'Unknown sweep axis {name}'
CHECKPOINT_NOT_FOUND = 'Checkpoint not found: {path}'
CHECKPOINT_CORRUPT = 'Checkpoint {path} is corrupt: {reason}'
CONFIG_FILE_NOT_FOUND = 'Config file not found: {path}'
CONFIG_FILE_INVALID = 'Config file {path} is invalid: {reason}'
EMPTY_REPORT = 'Report has no histogram bins'
PATH_NOT_WRITABLE = 'Cannot write {path}: {reason}'
CELL_FAILED = 'Sweep cell {axis}={value} strategy={strategy} seed={seed} failed: {reason}'
DROPOUT_NEEDS_RNG = 'Train-mode forward with dropout needs a random generator'
INVALID_CELL = 'Grid value {axis}={value} gives an invalid experiment: {reason}'
STRATEGY_MISMATCH = 'Checkpoint {path} holds a {kind} agent, not {strategy}'
