pub mod backpressure;
pub mod clock;
pub mod harness;
pub mod informer;
pub mod model;
pub mod store;
pub mod supersim;
pub mod syncer;
pub mod timer;
pub mod workqueue;
