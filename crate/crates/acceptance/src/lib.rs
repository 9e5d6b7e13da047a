//! Holds only the acceptance integration test target.
