//! Concrete environment builders for the three experimental testbeds, plus
//! the CSV rate-table loader used by the queueing simulator.

mod queue;
mod rates;
mod rideshare;
mod two_state;

pub use queue::{build_queue, QueueConfig, QueueReward};
pub use rates::{default_rate_table, load_rate_table, load_rate_table_str, RateTable};
pub use rideshare::{
    block_average_driver_deciles, simulate_rideshare, ChoiceWeights, RideshareConfig,
};
pub use two_state::{build_two_state, TwoStateConfig};
