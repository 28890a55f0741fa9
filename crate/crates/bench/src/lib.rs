//! Shared fixtures for the benchmarks.

use interest_core::{generate_world, Config, Services};

/// A reduced world with services built from default settings otherwise.
pub fn small_services(users: usize, articles: usize) -> Services {
    let mut config = Config::default();
    config.world.users = users;
    config.world.articles = articles;
    let world = generate_world(&config.world, config.world.seed).expect("world generates");
    Services::build(world, &config).expect("services build")
}
