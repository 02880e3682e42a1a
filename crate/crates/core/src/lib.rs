pub mod cost;
pub mod harness;
pub mod ddforest;
pub mod mmu;
pub mod os_sim;
pub mod paging;
pub mod tlb;
pub mod workloads;
