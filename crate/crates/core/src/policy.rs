//! Switching policies placeholder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwitchChoice { UseObserved, UseEnhanced }
#[derive(Debug, Clone)]
pub struct Decision { pub choice: SwitchChoice }
impl Decision { pub fn new(choice: SwitchChoice) -> Self { Decision { choice } } }
