# Reference-guided SR network with hand-written backpropagation
