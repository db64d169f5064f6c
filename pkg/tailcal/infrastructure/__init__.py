"""Infrastructure layer - external dependencies"""
