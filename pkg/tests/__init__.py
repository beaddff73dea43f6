# Tests for balltrack package
