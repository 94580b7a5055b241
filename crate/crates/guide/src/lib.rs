//! The chapters of `book/` as doc modules, so `cargo test` runs every
//! snippet in the book.

macro_rules! chapter {
    ($name:ident, $file:literal) => {
        #[doc = include_str!(concat!("../../../book/src/", $file))]
        pub mod $name {}
    };
}

chapter!(intro, "intro.md");
chapter!(tensors, "tensors.md");
chapter!(attention, "attention.md");
chapter!(model, "model.md");
chapter!(data, "data.md");
chapter!(metrics, "metrics.md");
chapter!(training, "training.md");
chapter!(cli, "cli.md");
chapter!(formats, "formats.md");
