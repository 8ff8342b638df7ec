# Unit Tests Package