# Binary formats for patch databases and network checkpoints
