# Tests for puzzlekit
