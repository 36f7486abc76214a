// SPDX-License-Identifier: (Apache-2.0 OR MIT)

pub mod bench;
pub mod engine;
pub mod host_api;
pub mod vm;
pub mod zns;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/zones.md")]
    mod zones {}
    #[doc = include_str!("../../../book/src/bytecode.md")]
    mod bytecode {}
    #[doc = include_str!("../../../book/src/offload.md")]
    mod offload {}
    #[doc = include_str!("../../../book/src/image-format.md")]
    mod image_format {}
    #[doc = include_str!("../../../book/src/benchmark.md")]
    mod benchmark {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
