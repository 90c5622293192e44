# Tests for fsdag
