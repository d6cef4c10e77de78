//! Holds the `acceptance` test target, which runs last in a workspace test
//! run so that a failing criterion does not hide the other suites.
