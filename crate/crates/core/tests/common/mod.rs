// SPDX-License-Identifier: (Apache-2.0 OR MIT)
#![allow(dead_code)]

pub mod corpus;
pub mod fuzz;
pub mod zns_model;
